//! Tabular run data: parameter sets with named columns, optional simulator
//! outputs and optional replicate groups.
//!
//! The text format is plain CSV. The first line names the columns; input
//! columns are recognised by matching the names of a [`ParameterSpace`],
//! a column called `replicate_group` carries the grouping key, and every
//! other column is an output.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::space::ParameterSpace;

/// Name of the optional CSV column holding replicate-group identifiers.
pub const REPLICATE_COLUMN: &str = "replicate_group";

#[derive(Clone, Debug, PartialEq)]
pub struct RunTable {
    input_names: Vec<String>,
    inputs: Vec<Vec<f64>>,
    output_names: Vec<String>,
    outputs: Vec<Vec<f64>>,
    replicate_key: Option<Vec<u64>>,
}

fn check_unique(names: &[String], what: &str) -> Result<()> {
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(Error::Schema(format!("duplicate {what} column `{n}`")));
        }
    }
    Ok(())
}

impl RunTable {
    /// A table of parameter sets without outputs.
    pub fn from_inputs(input_names: Vec<String>, inputs: Vec<Vec<f64>>) -> Result<Self> {
        check_unique(&input_names, "input")?;
        if let Some(row) = inputs.iter().find(|r| r.len() != input_names.len()) {
            return Err(Error::Schema(format!(
                "row has {} values but there are {} input columns",
                row.len(),
                input_names.len()
            )));
        }
        let n = inputs.len();
        Ok(RunTable {
            input_names,
            inputs,
            output_names: Vec::new(),
            outputs: vec![Vec::new(); n],
            replicate_key: None,
        })
    }

    /// A table of parameter sets in the canonical order of `space`.
    pub fn from_space_points(space: &ParameterSpace, inputs: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_inputs(space.names(), inputs)
    }

    pub fn with_outputs(mut self, output_names: Vec<String>, outputs: Vec<Vec<f64>>) -> Result<Self> {
        check_unique(&output_names, "output")?;
        if let Some(clash) = output_names.iter().find(|n| self.input_names.contains(n)) {
            return Err(Error::Schema(format!("`{clash}` is both an input and an output")));
        }
        if outputs.len() != self.inputs.len() {
            return Err(Error::Schema(format!(
                "{} output rows for {} input rows",
                outputs.len(),
                self.inputs.len()
            )));
        }
        if outputs.iter().any(|r| r.len() != output_names.len()) {
            return Err(Error::Schema("output row length does not match output names".into()));
        }
        self.output_names = output_names;
        self.outputs = outputs;
        Ok(self)
    }

    pub fn with_replicate_key(mut self, key: Vec<u64>) -> Result<Self> {
        if key.len() != self.inputs.len() {
            return Err(Error::Schema("replicate key length does not match row count".into()));
        }
        self.replicate_key = Some(key);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn output_names(&self) -> &[String] {
        &self.output_names
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }

    pub fn replicate_key(&self) -> Option<&[u64]> {
        self.replicate_key.as_deref()
    }

    pub fn has_output(&self, name: &str) -> bool {
        self.output_names.iter().any(|n| n == name)
    }

    pub fn output_column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .output_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("output column `{name}` not found")))?;
        Ok(self.outputs.iter().map(|r| r[j]).collect())
    }

    /// Input rows rearranged into the canonical order of `space`.
    pub fn points_in(&self, space: &ParameterSpace) -> Result<Vec<Vec<f64>>> {
        let order = space.column_order(&self.input_names)?;
        if order.iter().enumerate().all(|(i, &j)| i == j) {
            return Ok(self.inputs.clone());
        }
        Ok(self
            .inputs
            .iter()
            .map(|r| order.iter().map(|&j| r[j]).collect())
            .collect())
    }

    /// Same table with input columns in the canonical order of `space`.
    pub fn arranged(&self, space: &ParameterSpace) -> Result<RunTable> {
        let inputs = self.points_in(space)?;
        Ok(RunTable {
            input_names: space.names(),
            inputs,
            output_names: self.output_names.clone(),
            outputs: self.outputs.clone(),
            replicate_key: self.replicate_key.clone(),
        })
    }

    pub fn select_rows(&self, rows: &[usize]) -> RunTable {
        RunTable {
            input_names: self.input_names.clone(),
            inputs: rows.iter().map(|&i| self.inputs[i].clone()).collect(),
            output_names: self.output_names.clone(),
            outputs: rows.iter().map(|&i| self.outputs[i].clone()).collect(),
            replicate_key: self
                .replicate_key
                .as_ref()
                .map(|k| rows.iter().map(|&i| k[i]).collect()),
        }
    }

    /// Drop output columns, keeping the parameter sets.
    pub fn inputs_only(&self) -> RunTable {
        RunTable {
            input_names: self.input_names.clone(),
            inputs: self.inputs.clone(),
            output_names: Vec::new(),
            outputs: vec![Vec::new(); self.inputs.len()],
            replicate_key: None,
        }
    }

    /// Append the rows of `other`, which must have the same columns.
    pub fn concat(&self, other: &RunTable) -> Result<RunTable> {
        if self.input_names != other.input_names || self.output_names != other.output_names {
            return Err(Error::Schema("cannot concatenate tables with different columns".into()));
        }
        let mut out = self.clone();
        out.inputs.extend(other.inputs.iter().cloned());
        out.outputs.extend(other.outputs.iter().cloned());
        out.replicate_key = match (&self.replicate_key, &other.replicate_key) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            (None, None) => None,
            _ => return Err(Error::Schema("only one table carries replicate groups".into())),
        };
        Ok(out)
    }

    pub fn read_csv<R: Read>(reader: R, space: &ParameterSpace) -> Result<RunTable> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        check_unique(&header, "csv")?;
        let mut input_cols = Vec::with_capacity(space.dim());
        for p in space.parameters() {
            let j = header.iter().position(|h| *h == p.name).ok_or_else(|| {
                Error::Schema(format!("parameter `{}` has no column in the run table", p.name))
            })?;
            input_cols.push(j);
        }
        let rep_col = header.iter().position(|h| h == REPLICATE_COLUMN);
        let output_cols: Vec<usize> = (0..header.len())
            .filter(|j| !input_cols.contains(j) && Some(*j) != rep_col)
            .collect();

        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        let mut key = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |j: usize| -> Result<f64> {
                let s = rec.get(j).unwrap_or("");
                s.parse::<f64>().map_err(|_| {
                    Error::Schema(format!(
                        "row {}: column `{}` holds `{s}`, not a number",
                        line + 2,
                        header[j]
                    ))
                })
            };
            inputs.push(input_cols.iter().map(|&j| parse(j)).collect::<Result<Vec<_>>>()?);
            outputs.push(output_cols.iter().map(|&j| parse(j)).collect::<Result<Vec<_>>>()?);
            if let Some(j) = rep_col {
                let v = parse(j)?;
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Schema(format!(
                        "row {}: replicate group must be a non-negative integer",
                        line + 2
                    )));
                }
                key.push(v as u64);
            }
        }
        if inputs.is_empty() {
            return Err(Error::Schema("run table has no rows".into()));
        }
        let table = RunTable::from_inputs(space.names(), inputs)?
            .with_outputs(output_cols.iter().map(|&j| header[j].clone()).collect(), outputs)?;
        if rep_col.is_some() {
            table.with_replicate_key(key)
        } else {
            Ok(table)
        }
    }

    pub fn read_csv_path(path: impl AsRef<Path>, space: &ParameterSpace) -> Result<RunTable> {
        let f = std::fs::File::open(path.as_ref())?;
        Self::read_csv(std::io::BufReader::new(f), space)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.input_names.iter().map(String::as_str).collect();
        header.extend(self.output_names.iter().map(String::as_str));
        if self.replicate_key.is_some() {
            header.push(REPLICATE_COLUMN);
        }
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.inputs[i].iter().map(|v| v.to_string()).collect();
            rec.extend(self.outputs[i].iter().map(|v| v.to_string()));
            if let Some(k) = &self.replicate_key {
                rec.push(k[i].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path.as_ref())?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn space() -> ParameterSpace {
        ParameterSpace::new([("rate1", 0.0, 5.0), ("rate2", -2.0, 2.0)]).unwrap()
    }

    #[test]
    fn reads_shuffled_columns_into_canonical_order() {
        let csv = "rate2,y,rate1\n1,10,1\n-1,20,2\n";
        let t = RunTable::read_csv(csv.as_bytes(), &space()).unwrap();
        assert_eq!(t.input_names(), &["rate1".to_string(), "rate2".to_string()]);
        assert_eq!(t.inputs(), &[vec![1.0, 1.0], vec![2.0, -1.0]]);
        assert_eq!(t.output_column("y").unwrap(), vec![10.0, 20.0]);
    }

    #[test]
    fn missing_parameter_column_is_schema_error() {
        let csv = "rate2,y\n1,10\n";
        assert!(matches!(
            RunTable::read_csv(csv.as_bytes(), &space()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn non_numeric_cell_is_schema_error() {
        let csv = "rate1,rate2\n1,abc\n";
        assert!(matches!(
            RunTable::read_csv(csv.as_bytes(), &space()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn replicate_column_round_trips() {
        let csv = "rate1,rate2,y,replicate_group\n1,1,3.5,0\n1,1,4.5,0\n2,0,1,1\n";
        let t = RunTable::read_csv(csv.as_bytes(), &space()).unwrap();
        assert_eq!(t.replicate_key(), Some(&[0u64, 0, 1][..]));
        assert_eq!(t.output_names(), &["y".to_string()]);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = RunTable::read_csv(buf.as_slice(), &space()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn concat_requires_matching_columns() {
        let a = RunTable::from_inputs(vec!["a".into()], vec![vec![1.0]]).unwrap();
        let b = RunTable::from_inputs(vec!["b".into()], vec![vec![1.0]]).unwrap();
        assert!(a.concat(&b).is_err());
        assert_eq!(a.concat(&a).unwrap().len(), 2);
    }
}
