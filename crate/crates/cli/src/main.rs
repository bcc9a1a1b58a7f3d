fn main() {
    std::process::exit(amis_lab::run(std::env::args_os()));
}
