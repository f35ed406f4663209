fn main() {
    std::process::exit(ddpred::cli::run(std::env::args_os()));
}
