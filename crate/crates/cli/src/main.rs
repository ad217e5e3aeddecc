fn main() {
    std::process::exit(equidiag_cli::run(std::env::args_os()));
}
