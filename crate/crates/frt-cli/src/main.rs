fn main() {
    std::process::exit(frt_cli::run(std::env::args_os()));
}
