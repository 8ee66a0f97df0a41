fn main() {
    std::process::exit(rankq_cli::run(std::env::args_os()));
}
