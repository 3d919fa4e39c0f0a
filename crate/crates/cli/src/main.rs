fn main() {
    std::process::exit(scorecl_cli::run(std::env::args_os()));
}
