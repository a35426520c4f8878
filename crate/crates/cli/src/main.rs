fn main() {
    std::process::exit(sketchreg_cli::run(std::env::args_os()));
}
