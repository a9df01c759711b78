fn main() {
    std::process::exit(hat_core::cli::run(std::env::args_os()));
}
