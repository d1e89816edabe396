use optdoob::fixtures;
use optdoob::harness::{verify_lemmas, HarnessConfig};
use optdoob::{Exec, Tolerances};

fn main() {
    let cfg = HarnessConfig { seed: 1, ..Default::default() };
    for fam in [fixtures::d1(), fixtures::random_family(5, 3, 4, 3)] {
        let t = std::time::Instant::now();
        let r = verify_lemmas(&fam, cfg, &Tolerances::default(), Exec::default()).unwrap();
        print!("{}", r.to_table());
        println!("{:?}", t.elapsed());
    }
}
