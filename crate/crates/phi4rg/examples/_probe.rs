// temporary numeric probe (deleted before finishing)
use phi4rg::oracle::*;

fn main() {
    let n = 1usize;
    let alg = FieldAlgebra::new(7, n).unwrap();
    // w = 0: the pure one-step Gaussian sector (W-terms vanish)
    let w = SmallKernel::<f64>::from_radial(&alg, &[0.0]).unwrap();
    let c = SmallKernel::<f64>::random_isotropic(&alg, 1, 12, 0.25).unwrap();
    let eval = |g: f64, nu: f64, z: f64, y: f64| -> [[f64; 4]; 2] {
        let o = u_pt_oracle(&alg, &g, &nu, &z, &y, &w, &c).unwrap();
        let f = formula_u_pt(&alg, &g, &nu, &z, &y, &w, &c);
        [
            [f.g_pt, f.nu_pt, f.zy_pt, f.du_pt],
            [o.g, o.nu, o.z + o.y, o.u],
        ]
    };
    let names = ["g", "nu", "z", "y"];
    let outs = ["g_pt", "nu_pt", "zy_pt", "du_pt"];
    let unit = |i: usize, t: f64| {
        let mut v = [0.0; 4];
        v[i] = t;
        v
    };
    let mut lin = [[[0.0f64; 4]; 2]; 4];
    let mut quad = [[[0.0f64; 4]; 2]; 4];
    for i in 0..4 {
        let v1 = unit(i, 1.0);
        let v2 = unit(i, 2.0);
        let f1 = eval(v1[0], v1[1], v1[2], v1[3]);
        let f2 = eval(v2[0], v2[1], v2[2], v2[3]);
        for side in 0..2 {
            for o in 0..4 {
                let q = (f2[side][o] - 2.0 * f1[side][o]) / 2.0;
                quad[i][side][o] = q;
                lin[i][side][o] = f1[side][o] - q;
            }
        }
    }
    for i in 0..4 {
        for o in 0..4 {
            let (lf, lo) = (lin[i][0][o], lin[i][1][o]);
            let (qf, qo) = (quad[i][0][o], quad[i][1][o]);
            if (lf - lo).abs() > 1e-10 * lf.abs().max(1.0) {
                println!("LIN  {}·{}: formula {lf:+.6e} oracle {lo:+.6e}", names[i], outs[o]);
            }
            if (qf - qo).abs() > 1e-10 * qf.abs().max(1.0) {
                println!("QUAD {}²·{}: formula {qf:+.6e} oracle {qo:+.6e}", names[i], outs[o]);
            }
        }
    }
    for i in 0..4 {
        for j in (i + 1)..4 {
            let mut v = [0.0; 4];
            v[i] = 1.0;
            v[j] = 1.0;
            let fij = eval(v[0], v[1], v[2], v[3]);
            for o in 0..4 {
                let cf = fij[0][o] - lin[i][0][o] - lin[j][0][o] - quad[i][0][o] - quad[j][0][o];
                let co = fij[1][o] - lin[i][1][o] - lin[j][1][o] - quad[i][1][o] - quad[j][1][o];
                if (cf - co).abs() > 1e-10 * cf.abs().max(1.0) {
                    println!(
                        "CROSS {}{}·{}: formula {cf:+.6e} oracle {co:+.6e}",
                        names[i], names[j], outs[o]
                    );
                }
            }
        }
    }
    println!("done (w = 0)");
}
