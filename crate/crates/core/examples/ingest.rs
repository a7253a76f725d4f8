//! From relational records to a vector of cell counts.

use matmech::workload::{ingest_cells, Partition, Table};

const RECORDS: &str = "\
name,gradyear,gender,gpa
ann,2011,F,3.6
bob,2011,M,3.1
cat,2012,F,3.9
dan,2013,M,2.8
eve,2014,F,3.3
fay,2014,F,3.7
gus,2012,M,3.0
";

fn main() -> matmech::Result<()> {
    let table = Table::from_csv(RECORDS.as_bytes())?;

    let partition = Partition::from_json(r#"{"gradyear": ["2011", "2012", "2013", "2014"], "gender": ["M", "F"]}"#)?;
    let x = ingest_cells(&table, &partition)?;
    println!("shape {:?}: {:?}", x.shape().dims(), x.values().as_slice());

    // Numeric buckets: [2.5, 3.0), [3.0, 3.5), [3.5, 4.0].
    let by_gpa = Partition::from_json(r#"{"gpa": [2.5, 3.0, 3.5, 4.0]}"#)?;
    println!("gpa buckets: {:?}", ingest_cells(&table, &by_gpa)?.values().as_slice());

    // A value outside every bucket is an error naming the attribute.
    let narrow = Partition::from_json(r#"{"gradyear": ["2011", "2012"]}"#)?;
    if let Err(e) = ingest_cells(&table, &narrow) {
        println!("rejected: {e}");
    }
    Ok(())
}
