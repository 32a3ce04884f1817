fn main() {
    std::process::exit(cloaksynth_core::cli::main_with_args(std::env::args().skip(1)));
}
