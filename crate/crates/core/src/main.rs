fn main() {
    std::process::exit(ttsched::cli::run(std::env::args_os()));
}
