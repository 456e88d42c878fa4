fn main() {
    std::process::exit(selfnorm::cli::run(std::env::args_os()));
}
