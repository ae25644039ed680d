fn main() {
    std::process::exit(keystego_cli::run(std::env::args_os()));
}
