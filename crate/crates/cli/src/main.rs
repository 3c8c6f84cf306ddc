fn main() {
    std::process::exit(moskit_cli::run(std::env::args_os()));
}
