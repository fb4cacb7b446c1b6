fn main() {
    println!("skeldistill");
}
