/** Raw annotation files -> canonical per-task .labels files.
 *
 * VA: per-frame "valence,arousal" in [-1, 1]. Expr: one class id per
 * frame in {-1, 0..7}. AU: 12 comma-separated {-1, 0, 1} per frame.
 * ERI: a single line of 7 intensities in [0, 1]. The -1 invalid marker
 * passes through untouched; anything out of range fails with the
 * offending line number.
 */

import * as fs from 'fs';
import * as path from 'path';

export type Task = 'va' | 'expr' | 'au' | 'eri';

export const EXPR_CLASSES = 8;
export const AU_COUNT = 12;
export const ERI_DIMS = 7;

export class RangeError extends Error {
  constructor(
    public readonly line: number,
    message: string
  ) {
    super(`line ${line}: ${message}`);
  }
}

function splitLines(raw: string): string[] {
  return raw
    .split(/\r?\n/)
    .map((l) => l.trim())
    .filter((l) => l.length > 0);
}

function parseFloatStrict(token: string, line: number): number {
  const v = Number(token);
  if (token.length === 0 || !Number.isFinite(v)) {
    throw new RangeError(line, `not a finite number: ${JSON.stringify(token)}`);
  }
  return v;
}

function parseIntStrict(token: string, line: number): number {
  const v = Number(token);
  if (!Number.isInteger(v)) {
    throw new RangeError(line, `not an integer: ${JSON.stringify(token)}`);
  }
  return v;
}

/** Validate raw annotation text; returns canonical label lines. */
export function convertLabels(raw: string, task: Task): string[] {
  const lines = splitLines(raw);
  if (lines.length === 0) {
    throw new RangeError(1, 'no annotation lines');
  }
  if (task === 'va') {
    return lines.map((line, i) => {
      const parts = line.split(',');
      if (parts.length !== 2) {
        throw new RangeError(i + 1, `expected "valence,arousal", got ${JSON.stringify(line)}`);
      }
      for (const part of parts) {
        const v = parseFloatStrict(part.trim(), i + 1);
        if (v < -1.0 || v > 1.0) {
          throw new RangeError(i + 1, `value ${v} outside [-1, 1]`);
        }
      }
      // canonical form preserves the annotated values verbatim
      return parts.map((p) => p.trim()).join(',');
    });
  }
  if (task === 'expr') {
    return lines.map((line, i) => {
      const v = parseIntStrict(line, i + 1);
      if (v !== -1 && (v < 0 || v >= EXPR_CLASSES)) {
        throw new RangeError(i + 1, `class ${v} outside {-1, 0..${EXPR_CLASSES - 1}}`);
      }
      return String(v);
    });
  }
  if (task === 'au') {
    return lines.map((line, i) => {
      const parts = line.split(',').map((p) => p.trim());
      if (parts.length !== AU_COUNT) {
        throw new RangeError(i + 1, `expected ${AU_COUNT} values, got ${parts.length}`);
      }
      const values = parts.map((p) => {
        const v = parseIntStrict(p, i + 1);
        if (v !== -1 && v !== 0 && v !== 1) {
          throw new RangeError(i + 1, `value ${v} outside {-1, 0, 1}`);
        }
        return v;
      });
      return values.join(',');
    });
  }
  // eri: one line, 7 intensities
  if (lines.length !== 1) {
    throw new RangeError(2, `per-video labels must be a single line, got ${lines.length}`);
  }
  const parts = lines[0].split(/[\s,]+/).filter((p) => p.length > 0);
  if (parts.length !== ERI_DIMS) {
    throw new RangeError(1, `expected ${ERI_DIMS} intensities, got ${parts.length}`);
  }
  const values = parts.map((p) => {
    const v = parseFloatStrict(p, 1);
    if (v < 0.0 || v > 1.0) {
      throw new RangeError(1, `intensity ${v} outside [0, 1]`);
    }
    return v;
  });
  return [values.map((v) => v.toFixed(6)).join(' ')];
}

export function exportLabels(rawPath: string, task: Task, outPath: string): void {
  const lines = convertLabels(fs.readFileSync(rawPath, 'utf-8'), task);
  fs.mkdirSync(path.dirname(outPath), { recursive: true });
  fs.writeFileSync(outPath, lines.join('\n') + '\n', 'utf-8');
}
