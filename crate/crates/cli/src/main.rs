fn main() {
    std::process::exit(vpidm_cli::run(std::env::args_os()));
}
