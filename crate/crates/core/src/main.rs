fn main() {
    std::process::exit(covresp::cli::run(std::env::args_os()));
}
