use std::fs::File;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::path::Path;
use std::str::FromStr;

use super::TraceRecord;
use crate::error::{Error, Result};
use crate::key::FlowKey;

pub const CSV_TRACE_HEADER: [&str; 7] = [
    "ts_us", "src_ip", "dst_ip", "src_port", "dst_port", "proto", "len",
];

pub struct CsvTraceReader<R: Read> {
    inner: csv::StringRecordsIntoIter<R>,
}

pub fn read_csv_trace(path: impl AsRef<Path>) -> Result<CsvTraceReader<File>> {
    CsvTraceReader::new(File::open(path)?)
}

impl<R: Read> CsvTraceReader<R> {
    pub fn new(input: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(CSV_TRACE_HEADER.iter().copied()) {
            return Err(Error::malformed(
                "csv trace header",
                format!(
                    "expected {}, got {}",
                    CSV_TRACE_HEADER.join(","),
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            ));
        }
        Ok(CsvTraceReader {
            inner: rdr.into_records(),
        })
    }
}

pub(crate) fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    let raw = rec
        .get(i)
        .ok_or_else(|| Error::malformed(format!("line {line}"), format!("missing field {name}")))?;
    raw.parse()
        .map_err(|_| Error::malformed(format!("line {line}"), format!("bad {name}: {raw:?}")))
}

pub(crate) fn parse_key(rec: &csv::StringRecord, offset: usize) -> Result<FlowKey> {
    Ok(FlowKey {
        src_addr: field::<Ipv4Addr>(rec, offset, "src_ip")?,
        dst_addr: field::<Ipv4Addr>(rec, offset + 1, "dst_ip")?,
        src_port: field(rec, offset + 2, "src_port")?,
        dst_port: field(rec, offset + 3, "dst_port")?,
        protocol: field(rec, offset + 4, "proto")?,
    })
}

pub(crate) fn key_fields(k: &FlowKey) -> [String; 5] {
    [
        k.src_addr.to_string(),
        k.dst_addr.to_string(),
        k.src_port.to_string(),
        k.dst_port.to_string(),
        k.protocol.to_string(),
    ]
}

impl<R: Read> Iterator for CsvTraceReader<R> {
    type Item = Result<TraceRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        let rec = match self.inner.next()? {
            Ok(r) => r,
            Err(e) => return Some(Err(e.into())),
        };
        Some((|| {
            let wire_len: u32 = field(&rec, 6, "len")?;
            if wire_len == 0 {
                return Err(Error::malformed(
                    format!("line {}", rec.position().map_or(0, |p| p.line())),
                    "packet length must be at least 1",
                ));
            }
            Ok(TraceRecord {
                ts_us: field(&rec, 0, "ts_us")?,
                key: parse_key(&rec, 1)?,
                wire_len,
            })
        })())
    }
}

pub fn write_csv_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<()> {
    let file = File::create(path)?;
    write_csv_records(file, records)
}

pub(crate) fn write_csv_records<W: Write>(out: W, records: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_TRACE_HEADER)?;
    for r in records {
        let [s, d, sp, dp, p] = key_fields(&r.key);
        w.write_record([r.ts_us.to_string(), s, d, sp, dp, p, r.wire_len.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_records_and_comments() {
        let text = "# produced by hand\nts_us,src_ip,dst_ip,src_port,dst_port,proto,len\n\
                    10,10.0.0.1,10.0.0.2,1234,80,6,64\n11, 10.0.0.3 ,10.0.0.4,53,53,17,1500\n";
        let recs: Vec<_> = CsvTraceReader::new(text.as_bytes())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].key.src_port, 1234);
        assert_eq!(recs[1].key.src_addr, Ipv4Addr::new(10, 0, 0, 3));
        assert_eq!(recs[1].wire_len, 1500);
    }

    #[test]
    fn rejects_wrong_header() {
        let text = "ts,src,dst\n1,2,3\n";
        assert!(CsvTraceReader::new(text.as_bytes()).is_err());
    }

    #[test]
    fn reports_bad_fields() {
        let text =
            "ts_us,src_ip,dst_ip,src_port,dst_port,proto,len\n1,10.0.0.300,10.0.0.2,1,2,6,64\n\
                    2,10.0.0.1,10.0.0.2,1,2,6,0\n";
        let out: Vec<_> = CsvTraceReader::new(text.as_bytes()).unwrap().collect();
        assert!(matches!(out[0], Err(Error::Malformed { .. })));
        assert!(matches!(out[1], Err(Error::Malformed { .. })));
    }

    #[test]
    fn write_then_read() {
        let k = FlowKey::new(
            Ipv4Addr::new(1, 2, 3, 4),
            Ipv4Addr::new(5, 6, 7, 8),
            9,
            10,
            17,
        );
        let recs = vec![
            TraceRecord {
                ts_us: 5,
                key: k,
                wire_len: 40,
            },
            TraceRecord {
                ts_us: 6,
                key: k,
                wire_len: 1400,
            },
        ];
        let mut buf = Vec::new();
        write_csv_records(&mut buf, &recs).unwrap();
        let back: Vec<_> = CsvTraceReader::new(buf.as_slice())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(back, recs);
    }
}
