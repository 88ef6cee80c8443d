fn main() {
    std::process::exit(spikequant::cli::run(std::env::args_os()));
}
