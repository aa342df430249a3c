fn main() {
    std::process::exit(poincare_opt::cli::run_command(std::env::args_os()));
}
