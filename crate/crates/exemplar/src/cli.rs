//! (under construction)

pub fn run() {
    unimplemented!("command-line front end not wired up yet");
}
