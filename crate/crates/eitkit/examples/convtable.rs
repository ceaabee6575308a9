//! Dev probe: print the bump convergence table.

use eitkit::forward::{convergence_study, Manufactured};

fn main() {
    let case = Manufactured::bump();
    let t0 = std::time::Instant::now();
    let rows = convergence_study(&case, &[8, 16, 32, 64, 128], 16, 0.125, 1.0).unwrap();
    for r in &rows {
        println!(
            "h=1/{:<4} err_u={:.4e} ord_u={:<8} err_V={:.4e} ord_V={}",
            (1.0 / r.h).round() as usize,
            r.err_u,
            r.order_u.map(|o| format!("{o:.4}")).unwrap_or_default(),
            r.err_volt,
            r.order_volt.map(|o| format!("{o:.4}")).unwrap_or_default(),
        );
    }
    println!("total {:.1?}", t0.elapsed());
}
