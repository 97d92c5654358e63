/** Binary feature-sequence files (.fseq).
 *
 * Layout: 5-byte magic "FSEQ1", little-endian u32 header length, UTF-8
 * JSON header {video_id, feature_name, modality, T, D}, then T*D
 * little-endian float32 values row-major. The header is serialized with
 * sorted keys and ", "/": " separators so an exported file is
 * byte-identical to one written by the training pipeline.
 */

import * as fs from 'fs';
import * as path from 'path';

import { FeatureDescriptor } from './registry';

export const FSEQ_MAGIC = Buffer.from('FSEQ1', 'ascii');

export class DimMismatchError extends Error {}
export class NonFiniteError extends Error {}

export interface ArrayLike2D {
  /** row-major values, rows.length === t, every row dim wide */
  rows: number[][];
}

function headerJson(fields: Record<string, string | number>): string {
  const keys = Object.keys(fields).sort();
  const parts = keys.map((k) => `${JSON.stringify(k)}: ${JSON.stringify(fields[k])}`);
  return `{${parts.join(', ')}}`;
}

export function validateArray(rows: number[][], descriptor: FeatureDescriptor): void {
  if (rows.length < 1) {
    throw new DimMismatchError(`${descriptor.name}: need at least one frame`);
  }
  for (let t = 0; t < rows.length; t++) {
    const row = rows[t];
    if (!Array.isArray(row)) {
      throw new DimMismatchError(`${descriptor.name}: frame ${t} is not a row (array must be 2-dimensional)`);
    }
    if (row.length !== descriptor.dim) {
      throw new DimMismatchError(
        `${descriptor.name}: frame ${t} has ${row.length} values, registry says ${descriptor.dim}`
      );
    }
    for (let d = 0; d < row.length; d++) {
      if (!Number.isFinite(row[d])) {
        throw new NonFiniteError(`${descriptor.name}: non-finite value at frame ${t}, column ${d}`);
      }
    }
  }
}

export function encodeFseq(videoId: string, descriptor: FeatureDescriptor, rows: number[][]): Buffer {
  validateArray(rows, descriptor);
  const t = rows.length;
  const d = descriptor.dim;
  const header = Buffer.from(
    headerJson({
      D: d,
      T: t,
      feature_name: descriptor.name,
      modality: descriptor.modality,
      video_id: videoId,
    }),
    'utf-8'
  );
  const lenBuf = Buffer.alloc(4);
  lenBuf.writeUInt32LE(header.length, 0);
  const payload = Buffer.alloc(4 * t * d);
  let off = 0;
  for (const row of rows) {
    for (const v of row) {
      payload.writeFloatLE(Math.fround(v), off);
      off += 4;
    }
  }
  return Buffer.concat([FSEQ_MAGIC, lenBuf, header, payload]);
}

export interface DecodedFseq {
  videoId: string;
  featureName: string;
  modality: string;
  t: number;
  d: number;
  rows: number[][];
}

/** Read back an .fseq buffer; used for round-trip verification. */
export function decodeFseq(buf: Buffer): DecodedFseq {
  if (!buf.subarray(0, FSEQ_MAGIC.length).equals(FSEQ_MAGIC)) {
    throw new Error('bad magic: not a feature-sequence file');
  }
  let off = FSEQ_MAGIC.length;
  const hlen = buf.readUInt32LE(off);
  off += 4;
  const header = JSON.parse(buf.subarray(off, off + hlen).toString('utf-8'));
  off += hlen;
  const { T: t, D: d } = header;
  const expected = 4 * t * d;
  if (buf.length - off < expected) {
    throw new Error(`truncated payload: ${buf.length - off} bytes, header promises ${expected}`);
  }
  const rows: number[][] = [];
  for (let i = 0; i < t; i++) {
    const row: number[] = [];
    for (let j = 0; j < d; j++) {
      row.push(buf.readFloatLE(off));
      off += 4;
    }
    rows.push(row);
  }
  return {
    videoId: header.video_id,
    featureName: header.feature_name,
    modality: header.modality,
    t,
    d,
    rows,
  };
}

export function writeFseq(filePath: string, videoId: string, descriptor: FeatureDescriptor, rows: number[][]): void {
  fs.mkdirSync(path.dirname(filePath), { recursive: true });
  fs.writeFileSync(filePath, encodeFseq(videoId, descriptor, rows));
}
