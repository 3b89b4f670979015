fn main() {
    std::process::exit(mp3_sleep::cli::main());
}
