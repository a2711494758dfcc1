fn main() {
    std::process::exit(rgbd_gan_cli::main_with_args(std::env::args_os()));
}
