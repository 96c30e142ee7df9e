use std::collections::BTreeMap;

use morphint::integrand::{builtin, BuiltinName};
use morphint::oracle::{cubature_3d, product_lift, product_lift_log10};

fn main() {
    for (name, tol) in [
        (BuiltinName::PhiA, 1e-4),
        (BuiltinName::PhiB, 1e-4),
        (BuiltinName::PhiC, 5e-6),
    ] {
        let t0 = std::time::Instant::now();
        let f = builtin(name, 1, &BTreeMap::new()).unwrap();
        let domain = name.default_domain(1);
        match cubature_3d(f.as_ref(), &domain, tol) {
            Ok(r) => {
                println!(
                    "{name:?}@{tol:.0e}: {:.10e} +- {:.2e} ({} evals) in {:?}",
                    r.value,
                    r.abs_error_bound,
                    r.evaluations,
                    t0.elapsed()
                );
                match name {
                    BuiltinName::PhiA => {
                        println!("   ^5  = {:.6e} (expect 1.213e26)", product_lift(r.value, 5).unwrap());
                        println!("   ^10 = {:.6e} (expect 1.472e52)", product_lift(r.value, 10).unwrap());
                        println!("   ^20 = {:.6e} (expect 2.167e104)", product_lift(r.value, 20).unwrap());
                        println!("   ^30 log10 = {:?} (expect 3.189e156)", product_lift_log10(r.value, 30));
                    }
                    BuiltinName::PhiB => {
                        println!("   ^10 = {:.6e} (expect 2.53e56)", product_lift(r.value, 10).unwrap());
                    }
                    BuiltinName::PhiC => {
                        println!("   value vs 4595.90: diff {:.4}", r.value - 4595.90);
                        println!("   ^5  = {:.6e} (expect 2.05e18)", product_lift(r.value, 5).unwrap());
                        println!("   ^10 = {:.6e} (expect 4.20e36)", product_lift(r.value, 10).unwrap());
                    }
                    _ => {}
                }
            }
            Err(e) => println!("{name:?}@{tol:.0e}: ERROR {e}"),
        }
    }
}
