import { readFileSync } from "node:fs";

/** Raised for any structural problem in an input CSV; the message always
 * starts with "<file>:<line>" so the offending row can be found directly. */
export class CsvFormatError extends Error {
  constructor(file: string, line: number, detail: string) {
    super(`${file}:${line}: ${detail}`);
    this.name = "CsvFormatError";
  }
}

export interface CsvTable {
  file: string;
  schema: string;
  columns: string[];
  rows: number[][];
}

export const SUMMARY_SCHEMA = "giwr-summary-v1";
export const METRICS_SCHEMA = "giwr-metrics-v1";

function parseCell(cell: string, file: string, line: number, column: string): number {
  const text = cell.trim();
  // Matches the producer's float repr, which emits nan/inf rather than
  // the Infinity spellings Number() would accept.
  if (text === "nan") return NaN;
  if (text === "inf") return Infinity;
  if (text === "-inf") return -Infinity;
  const value = Number(text);
  if (text === "" || Number.isNaN(value)) {
    throw new CsvFormatError(file, line, `column ${column}: not a number: '${cell}'`);
  }
  return value;
}

/** Parse a training CSV. Lines starting with '#' are comments, except that
 * exactly one of them must read '# schema: <id>' and its id must equal
 * expectedSchema. The first non-comment line is the header; every later
 * line is a numeric row of the same width. */
export function parseCsv(text: string, file: string, expectedSchema: string): CsvTable {
  let schema = "";
  let columns: string[] | null = null;
  const rows: number[][] = [];

  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    const lineNo = i + 1;
    if (line === "") continue;
    if (line.startsWith("#")) {
      const match = line.match(/^#\s*schema:\s*(\S+)/);
      if (match) {
        if (schema !== "") {
          throw new CsvFormatError(file, lineNo, "duplicate schema line");
        }
        schema = match[1];
        if (schema !== expectedSchema) {
          throw new CsvFormatError(
            file, lineNo, `schema mismatch: expected ${expectedSchema}, found ${schema}`);
        }
      }
      continue;
    }
    if (columns === null) {
      columns = line.split(",").map((c) => c.trim());
      continue;
    }
    const cells = line.split(",");
    if (cells.length !== columns.length) {
      throw new CsvFormatError(
        file, lineNo, `expected ${columns.length} columns, found ${cells.length}`);
    }
    rows.push(cells.map((cell, j) => parseCell(cell, file, lineNo, columns![j])));
  }

  if (schema === "") {
    throw new CsvFormatError(file, 1, `missing '# schema:' line (expected ${expectedSchema})`);
  }
  if (columns === null) {
    throw new CsvFormatError(file, 1, "missing header line");
  }
  return { file, schema, columns, rows };
}

export function readCsv(file: string, expectedSchema: string): CsvTable {
  return parseCsv(readFileSync(file, "utf8"), file, expectedSchema);
}

export function column(table: CsvTable, name: string): number[] {
  const idx = table.columns.indexOf(name);
  if (idx < 0) {
    throw new CsvFormatError(table.file, 1, `missing column ${name}`);
  }
  return table.rows.map((row) => row[idx]);
}
