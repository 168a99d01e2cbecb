fn main() {
    std::process::exit(fidelity_cli::run(std::env::args_os()));
}
