fn main() {
    std::process::exit(rulescreen::cli::run(std::env::args_os()));
}
