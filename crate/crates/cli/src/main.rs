fn main() {
    std::process::exit(cbir_cli::run(std::env::args_os()));
}
