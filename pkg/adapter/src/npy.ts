/** Minimal reader for .npy array containers (v1.0/v2.0 headers).
 *
 * Supports little-endian float32/float64, C-order, 2-dimensional arrays,
 * which is what feature extractors dump. Anything else is rejected.
 */

import * as fs from 'fs';

const NPY_MAGIC = Buffer.from('\x93NUMPY', 'latin1');

export class NpyFormatError extends Error {}

export interface NpyArray {
  shape: number[];
  rows: number[][];
}

export function parseNpy(buf: Buffer): NpyArray {
  if (!buf.subarray(0, NPY_MAGIC.length).equals(NPY_MAGIC)) {
    throw new NpyFormatError('not an .npy file (bad magic)');
  }
  const major = buf.readUInt8(6);
  let headerLen: number;
  let off: number;
  if (major === 1) {
    headerLen = buf.readUInt16LE(8);
    off = 10;
  } else if (major === 2) {
    headerLen = buf.readUInt32LE(8);
    off = 12;
  } else {
    throw new NpyFormatError(`unsupported .npy version ${major}`);
  }
  const header = buf.subarray(off, off + headerLen).toString('latin1');
  off += headerLen;

  const descrMatch = header.match(/'descr':\s*'([^']+)'/);
  const fortranMatch = header.match(/'fortran_order':\s*(True|False)/);
  const shapeMatch = header.match(/'shape':\s*\(([^)]*)\)/);
  if (!descrMatch || !fortranMatch || !shapeMatch) {
    throw new NpyFormatError(`unparseable .npy header: ${header.trim()}`);
  }
  const descr = descrMatch[1];
  if (fortranMatch[1] === 'True') {
    throw new NpyFormatError('fortran-order arrays are not supported');
  }
  const shape = shapeMatch[1]
    .split(',')
    .map((s) => s.trim())
    .filter((s) => s.length > 0)
    .map((s) => parseInt(s, 10));

  let itemSize: number;
  let read: (o: number) => number;
  if (descr === '<f4') {
    itemSize = 4;
    read = (o) => buf.readFloatLE(o);
  } else if (descr === '<f8') {
    itemSize = 8;
    read = (o) => buf.readDoubleLE(o);
  } else {
    throw new NpyFormatError(`unsupported dtype ${descr}; need <f4 or <f8`);
  }

  if (shape.length !== 2) {
    throw new NpyFormatError(`array must be 2-dimensional (T, D), got shape (${shape.join(', ')})`);
  }
  const [t, d] = shape;
  if (buf.length - off < t * d * itemSize) {
    throw new NpyFormatError('truncated .npy payload');
  }
  const rows: number[][] = [];
  for (let i = 0; i < t; i++) {
    const row: number[] = [];
    for (let j = 0; j < d; j++) {
      row.push(read(off + (i * d + j) * itemSize));
    }
    rows.push(row);
  }
  return { shape, rows };
}

export function readNpy(path: string): NpyArray {
  return parseNpy(fs.readFileSync(path));
}

/** Array file loader keyed on extension: .npy binary or .json nested lists. */
export function readArrayFile(path: string): number[][] {
  if (path.endsWith('.npy')) {
    return readNpy(path).rows;
  }
  if (path.endsWith('.json')) {
    const parsed = JSON.parse(fs.readFileSync(path, 'utf-8'));
    if (!Array.isArray(parsed) || !parsed.every((r: unknown) => Array.isArray(r))) {
      throw new NpyFormatError(`${path}: JSON must be a 2-dimensional nested list`);
    }
    return parsed as number[][];
  }
  throw new NpyFormatError(`${path}: unsupported array container (need .npy or .json)`);
}
