fn main() {
    std::process::exit(beamdip::cli::main_with_args(std::env::args_os()));
}
