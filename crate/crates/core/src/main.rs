fn main() {
    std::process::exit(ensemble_pulse::cli::run(std::env::args_os()));
}
