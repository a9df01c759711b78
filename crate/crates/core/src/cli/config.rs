//! TOML config files with dotted `key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::CliError;

/// Ordered dotted-key overrides; later entries win.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides(Vec<(String, Value)>);

impl Overrides {
    /// Parses `key=value` strings. Values are read as TOML and fall back to
    /// plain strings, so `--set world.family=rotation` needs no quotes.
    pub fn parse(items: &[String]) -> Result<Self, CliError> {
        items
            .iter()
            .map(|item| {
                let (key, raw) = item
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("override `{item}` is not key=value")))?;
                let key = key.trim();
                if key.is_empty() || key.split('.').any(str::is_empty) {
                    return Err(CliError::Usage(format!("override `{item}` has an empty key")));
                }
                Ok((key.to_string(), parse_value(raw.trim())))
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Overrides)
    }

    pub fn set(&mut self, key: &str, value: impl Into<Value>) {
        self.0.push((key.to_string(), value.into()));
    }

    pub fn set_opt(&mut self, key: &str, value: Option<impl Into<Value>>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    pub fn extend(&mut self, other: Overrides) {
        self.0.extend(other.0);
    }

    fn apply(&self, table: &mut Table) -> Result<(), CliError> {
        for (key, value) in &self.0 {
            let mut parts: Vec<&str> = key.split('.').collect();
            let last = parts.pop().expect("split yields one part");
            let mut node = &mut *table;
            for p in parts {
                let entry = node.entry(p).or_insert_with(|| Value::Table(Table::new()));
                node = entry
                    .as_table_mut()
                    .ok_or_else(|| CliError::Usage(format!("override `{key}`: `{p}` is not a table")))?;
            }
            node.insert(last.to_string(), value.clone());
        }
        Ok(())
    }
}

fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Defaults, then the file at `path`, then `overrides`. Unknown keys and
/// ill-typed values are usage errors.
pub fn resolve<T>(path: Option<&Path>, overrides: &Overrides) -> Result<T, CliError>
where
    T: Default + Serialize + for<'de> Deserialize<'de>,
{
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|source| CliError::Io {
                path: p.to_path_buf(),
                source,
            })?;
            text.parse::<Table>()
                .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => Table::new(),
    };
    overrides.apply(&mut table)?;
    let defaults = Table::try_from(T::default()).map_err(|e| CliError::Usage(format!("config defaults: {e}")))?;
    let merged = merge(defaults, table);
    merged
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("invalid config: {e}")))
}

/// Deep merge of `top` over `base`. Tables merge key by key; anything else
/// is replaced.
fn merge(mut base: Table, top: Table) -> Table {
    for (k, v) in top {
        match (base.remove(&k), v) {
            (Some(Value::Table(b)), Value::Table(t)) => {
                base.insert(k, Value::Table(merge(b, t)));
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
    base
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Inner {
        a: f64,
        name: String,
    }

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    #[serde(default, deny_unknown_fields)]
    struct Outer {
        n: usize,
        inner: Inner,
        list: Vec<u64>,
    }

    fn ov(items: &[&str]) -> Overrides {
        Overrides::parse(&items.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn overrides_reach_nested_fields() {
        let c: Outer = resolve(None, &ov(&["n=3", "inner.a=0.5", "inner.name=abc", "list=[1, 2]"])).unwrap();
        assert_eq!(
            c,
            Outer {
                n: 3,
                inner: Inner { a: 0.5, name: "abc".into() },
                list: vec![1, 2],
            }
        );
    }

    #[test]
    fn file_then_overrides_with_later_winning() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "n = 7\n[inner]\na = 2.0\n").unwrap();
        let c: Outer = resolve(Some(&path), &ov(&["inner.a=4", "inner.a=5.5"])).unwrap();
        assert_eq!((c.n, c.inner.a, c.inner.name.as_str()), (7, 5.5, ""));
    }

    #[test]
    fn bad_keys_and_values_are_usage_errors() {
        assert!(matches!(resolve::<Outer>(None, &ov(&["bogus=1"])), Err(CliError::Usage(_))));
        assert!(matches!(resolve::<Outer>(None, &ov(&["n=-1"])), Err(CliError::Usage(_))));
        assert!(matches!(resolve::<Outer>(None, &ov(&["n.x=1"])), Err(CliError::Usage(_))));
        assert!(matches!(Overrides::parse(&["novalue".into()]), Err(CliError::Usage(_))));
        assert!(matches!(Overrides::parse(&["a..b=1".into()]), Err(CliError::Usage(_))));
    }
}
