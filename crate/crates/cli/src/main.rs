fn main() {
    std::process::exit(svstitch_cli::run(std::env::args_os()));
}
