fn main() {
    std::process::exit(switchsynth::cli::run());
}
