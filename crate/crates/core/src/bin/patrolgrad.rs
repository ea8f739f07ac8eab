fn main() {
    std::process::exit(patrolgrad::cli::run(std::env::args_os()));
}
