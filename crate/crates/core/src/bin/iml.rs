fn main() {
    std::process::exit(iml_core::harness::cli::run(std::env::args_os()));
}
