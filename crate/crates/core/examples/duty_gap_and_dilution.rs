//! Duty-gap bands and the container dilution arithmetic.

use tradesig::risk::{basel_overlap, dilution_model, duty_gap, DilutionScenario, TariffTable};

fn main() -> tradesig::Result<()> {
    let table = TariffTable::bundled();
    for declared in ["390210", "390110", "390729"] {
        let g = duty_gap(declared, "3915", 100_000.0, &table)?;
        let b = basel_overlap(declared);
        println!(
            "{declared} declared, 3915 true, $100,000: gap ${:.0} to ${:.0}; Y48 {} A3210 {}",
            g.lo,
            g.hi,
            b.y48.as_str(),
            b.a3210
        );
    }
    match duty_gap("392690", "3915", 1.0, &table) {
        Err(e) => println!("{e}"),
        Ok(g) => println!("{g:?}"),
    }

    println!("\npoisoned  blended $/kg  overstatement");
    for n_poisoned in 0..=10 {
        let o = dilution_model(&DilutionScenario {
            n_containers: 10,
            n_poisoned,
            kg_per_container: 20_000.0,
            declared_price: 5.0,
            scrap_price: 0.5,
        })?;
        println!(
            "{n_poisoned:>8}  {:>12.2}  ${:>10.0} ({:.0}%)",
            o.blended_price,
            o.overstatement_usd,
            o.overstatement_fraction * 100.0
        );
    }
    Ok(())
}
