fn main() {
    std::process::exit(soc_cli::run(std::env::args_os()));
}
