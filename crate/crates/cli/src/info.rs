//! The `info` command: a readable summary of a snapshot.

use std::fmt::Write as _;

use sgvm::adaptivity::level_histogram;

use crate::snapshot::{system_of_dim, Snapshot, VERSION};

pub fn info_text(snap: &Snapshot) -> String {
    let f = &snap.state.f;
    let spec = f.spec;
    let mut s = String::new();
    let system = system_of_dim(spec.d).map(|s| format!("{s:?}")).unwrap_or_default();
    let _ = writeln!(s, "format       skin v{VERSION}");
    let _ = writeln!(s, "system       {system} (d = {})", spec.d);
    let _ = writeln!(s, "degree k     {}", spec.k);
    let _ = writeln!(s, "level N      {}", spec.n);
    let _ = writeln!(s, "truncation   {}", spec.truncation.name());
    let _ = writeln!(s, "time         {}", snap.state.t);
    let _ = writeln!(s, "steps        {}", snap.step);
    for m in 0..spec.d {
        let _ = writeln!(s, "box[{m}]       [{}, {}]", f.domain.lo[m], f.domain.hi[m]);
    }
    let _ = writeln!(s, "elements     {}", f.set.len());
    let _ = writeln!(s, "dof          {}", f.coeffs.len());
    let norm = f.coeffs.iter().map(|v| v * v).sum::<f64>().sqrt();
    let _ = writeln!(s, "|f|_L2       {norm:.16e}");
    let em = &snap.state.em;
    for (name, c) in system_of_dim(spec.d).map(|s| s.field_names()).unwrap_or(&[]).iter().zip(&em.comps) {
        let n = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let _ = writeln!(s, "|{name}|_L2{:pad$}{n:.16e}", "", pad = 7 - name.len());
    }
    let _ = writeln!(s, "levels       active / total (percent)");
    for (levels, count) in level_histogram(&f.set) {
        let total: u64 = levels.iter().map(|&l| 1u64 << l.saturating_sub(1)).product();
        let lv: Vec<String> = levels.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(
            s,
            "  ({})  {count} / {total} ({:.2}%)",
            lv.join(","),
            100.0 * count as f64 / total as f64
        );
    }
    s
}
