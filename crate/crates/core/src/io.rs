//! CSV readers and writers for timelines and transitions.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rfmi::{Contact, CustomerTimeline, RfmiState, TransitionTuple};

pub const TIMELINE_HEADER: [&str; 5] = ["customer_id", "period", "amount", "action", "acont"];
pub const TRANSITION_HEADER: [&str; 13] =
    ["r", "f", "m", "ir", "if", "a", "acont", "r2", "f2", "m2", "ir2", "if2", "reward"];

fn check_header(found: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let found: Vec<&str> = found.iter().map(str::trim).collect();
    if found != expected {
        return Err(Error::data_at(
            1,
            format!("expected header '{}', found '{}'", expected.join(","), found.join(",")),
        ));
    }
    Ok(())
}

fn line_of(rec: &csv::StringRecord) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(0)
}

fn parse_f64(field: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 =
        field.trim().parse().map_err(|_| Error::data_at(line, format!("{what}: '{field}' is not a number")))?;
    if !v.is_finite() {
        return Err(Error::data_at(line, format!("{what} must be finite")));
    }
    Ok(v)
}

fn parse_usize(field: &str, what: &str, line: usize) -> Result<usize> {
    field.trim().parse().map_err(|_| Error::data_at(line, format!("{what}: '{field}' is not a non-negative integer")))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(r)
}

fn wrap_csv(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize);
    match line {
        Some(l) => Error::data_at(l, e.to_string()),
        None => Error::Csv(e),
    }
}

/// Reads a timeline CSV. Customers keep the order of their first row; each
/// customer must list periods `0..n` exactly once, in any order.
pub fn read_timelines<R: Read>(r: R) -> Result<Vec<CustomerTimeline>> {
    let mut rdr = reader(r);
    check_header(rdr.headers().map_err(wrap_csv)?, &TIMELINE_HEADER)?;

    struct Pending {
        id: String,
        rows: Vec<(usize, f64, Option<Contact>, usize)>,
    }
    let mut order: Vec<Pending> = Vec::new();
    let mut index = std::collections::HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(wrap_csv)?;
        let line = line_of(&rec);
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::data_at(line, "empty customer_id"));
        }
        let period = parse_usize(&rec[1], "period", line)?;
        let amount = parse_f64(&rec[2], "amount", line)?;
        if amount < 0.0 {
            return Err(Error::data_at(line, "amount must be non-negative"));
        }
        let contact = if rec[3].trim().is_empty() {
            None
        } else {
            let action = parse_usize(&rec[3], "action", line)?;
            let acont = if rec[4].trim().is_empty() { 0.0 } else { parse_f64(&rec[4], "acont", line)? };
            Some(Contact { action, acont })
        };
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            order.push(Pending { id, rows: Vec::new() });
            order.len() - 1
        });
        order[slot].rows.push((period, amount, contact, line));
    }
    if order.is_empty() {
        return Err(Error::data("timeline file has no rows"));
    }

    order
        .into_iter()
        .map(|mut p| {
            p.rows.sort_by_key(|r| r.0);
            for (expected, row) in p.rows.iter().enumerate() {
                if row.0 != expected {
                    return Err(Error::data_at(
                        row.3,
                        format!("customer {}: expected period {expected}, found {}", p.id, row.0),
                    ));
                }
            }
            let amounts = p.rows.iter().map(|r| r.1).collect();
            let contacts = p.rows.iter().map(|r| r.2).collect();
            CustomerTimeline::new(p.id, amounts, contacts)
        })
        .collect()
}

pub fn write_timelines<W: Write>(w: W, timelines: &[CustomerTimeline]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TIMELINE_HEADER)?;
    for t in timelines {
        for (p, (amount, contact)) in t.amounts().iter().zip(t.contacts()).enumerate() {
            let (action, acont) = match contact {
                Some(c) => (c.action.to_string(), c.acont.to_string()),
                None => (String::new(), String::new()),
            };
            wtr.write_record([t.customer_id().to_string(), p.to_string(), amount.to_string(), action, acont])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_transitions<R: Read>(r: R) -> Result<Vec<TransitionTuple>> {
    let mut rdr = reader(r);
    check_header(rdr.headers().map_err(wrap_csv)?, &TRANSITION_HEADER)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(wrap_csv)?;
        let line = line_of(&rec);
        let mut v = [0.0; 13];
        for (i, slot) in v.iter_mut().enumerate() {
            if i != 5 {
                *slot = parse_f64(&rec[i], TRANSITION_HEADER[i], line)?;
            }
        }
        let action = parse_usize(&rec[5], "a", line)?;
        let state = RfmiState::new(v[0], v[1], v[2], v[3], v[4]);
        let next_state = RfmiState::new(v[7], v[8], v[9], v[10], v[11]);
        for s in [&state, &next_state] {
            s.validate().map_err(|e| Error::data_at(line, e.to_string()))?;
        }
        if v[12] < 0.0 {
            return Err(Error::data_at(line, "reward must be non-negative"));
        }
        out.push(TransitionTuple { state, action, acont: v[6], next_state, reward: v[12] });
    }
    if out.is_empty() {
        return Err(Error::data("transition file has no rows"));
    }
    Ok(out)
}

pub fn write_transitions<W: Write>(w: W, tuples: &[TransitionTuple]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(TRANSITION_HEADER)?;
    for t in tuples {
        let rec = t.to_record();
        let fields: Vec<String> =
            rec.iter().enumerate().map(|(i, v)| if i == 5 { t.action.to_string() } else { v.to_string() }).collect();
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}
