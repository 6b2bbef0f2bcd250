fn main() {
    std::process::exit(slowfast_cli::run(std::env::args_os()));
}
