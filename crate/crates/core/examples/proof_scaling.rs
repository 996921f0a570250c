//! Inclusion-proof node counts as keys and blocks grow, with a log fit.

use glassdb::bench::scaling::{fit, scaling_point};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut points = Vec::new();
    for keys in [1_000, 10_000, 100_000] {
        for blocks in [10, 100, 1_000] {
            let p = scaling_point(keys, blocks, 200, 8, 3)?;
            println!(
                "m={keys:>7} B={blocks:>5} mean nodes {:>6.2} (upper {:.2}, lower {:.2})",
                p.mean_nodes, p.upper_height, p.lower_height
            );
            points.push(p);
        }
    }
    let f = fit(&points)?;
    println!(
        "nodes ~ {:.3}*log2 B + {:.3}*log2 m + {:.3}, R^2 = {:.4}",
        f.c_blocks, f.c_keys, f.c_const, f.r_squared
    );
    Ok(())
}
