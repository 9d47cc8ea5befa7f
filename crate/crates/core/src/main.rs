fn main() {
    std::process::exit(gaitgate::cli::run(std::env::args_os()));
}
