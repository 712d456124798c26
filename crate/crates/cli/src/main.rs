fn main() {
    println!("dg");
}
