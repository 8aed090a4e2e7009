/**
 * Strict CSV reader for the run artifacts: UTF-8, comma separator, one
 * header row, '.' decimal. Quoted fields are handled for safety although
 * the writers only quote when a field contains a separator.
 */

export interface Table {
  header: string[];
  rows: string[][];
}

export function parseCsv(text: string): Table {
  const records: string[][] = [];
  let field = "";
  let record: string[] = [];
  let inQuotes = false;
  let i = 0;
  const push = () => {
    record.push(field);
    field = "";
  };
  const endRecord = () => {
    push();
    // ignore a trailing blank line
    if (!(record.length === 1 && record[0] === "")) records.push(record);
    record = [];
  };
  while (i < text.length) {
    const c = text[i];
    if (inQuotes) {
      if (c === '"') {
        if (text[i + 1] === '"') {
          field += '"';
          i += 2;
          continue;
        }
        inQuotes = false;
        i += 1;
        continue;
      }
      field += c;
      i += 1;
      continue;
    }
    if (c === '"' && field === "") {
      inQuotes = true;
      i += 1;
    } else if (c === ",") {
      push();
      i += 1;
    } else if (c === "\n") {
      endRecord();
      i += 1;
    } else if (c === "\r") {
      i += 1; // swallow; \r\n handled by the \n branch
    } else {
      field += c;
      i += 1;
    }
  }
  if (field !== "" || record.length > 0) endRecord();
  if (records.length === 0) throw new Error("empty CSV: no header row");
  const header = records[0];
  const rows = records.slice(1);
  for (const r of rows) {
    if (r.length !== header.length) {
      throw new Error(
        `ragged CSV row: expected ${header.length} fields, got ${r.length}`,
      );
    }
  }
  return { header, rows };
}

/** Index of a required column; the error names the missing column. */
export function columnIndex(table: Table, name: string): number {
  const idx = table.header.indexOf(name);
  if (idx < 0) {
    throw new Error(
      `missing column "${name}" (header: ${table.header.join(", ")})`,
    );
  }
  return idx;
}

export function numericColumn(table: Table, name: string): number[] {
  const idx = columnIndex(table, name);
  return table.rows.map((r, k) => {
    const v = Number(r[idx]);
    if (!Number.isFinite(v)) {
      throw new Error(`column "${name}" row ${k + 1}: not a number: ${r[idx]!}`);
    }
    return v;
  });
}

export function stringColumn(table: Table, name: string): string[] {
  const idx = columnIndex(table, name);
  return table.rows.map((r) => r[idx]!);
}
