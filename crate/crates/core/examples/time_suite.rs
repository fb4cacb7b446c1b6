fn main() {
    let t = std::time::Instant::now();
    let g = skeldistill_core::verify::gradient_suite(24);
    println!("gradients: pass={} elapsed={:.2}s", g.pass(), t.elapsed().as_secs_f64());
    let t = std::time::Instant::now();
    let e = skeldistill_core::verify::eq6_suite(10);
    println!("eq6: pass={} elapsed={:.2}s", e.pass(), t.elapsed().as_secs_f64());
    let t = std::time::Instant::now();
    let o = skeldistill_core::verify::oracle_suite();
    println!("oracles: pass={} elapsed={:.2}s", o.pass(), t.elapsed().as_secs_f64());
}
