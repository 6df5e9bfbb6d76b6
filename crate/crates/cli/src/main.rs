fn main() {
    std::process::exit(colearn_cli::run(std::env::args_os()));
}
