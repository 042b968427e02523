fn main() {
    std::process::exit(dreamdiff_cli::run(std::env::args_os()));
}
