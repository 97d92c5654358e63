/** Batch export driven by a JSON manifest.
 *
 * The manifest lists (video_id, feature_name, source array path) entries
 * plus a target dataset directory; each entry lands at
 * <target>/<task>/<split>/<video_id>/<feature>.fseq. Dims are checked
 * against the standard registry before anything is written. No
 * resampling or alignment happens here: misaligned inputs are refused,
 * aligning streams is the training pipeline's job.
 */

import * as fs from 'fs';
import * as path from 'path';

import { writeFseq } from './fseq';
import { readArrayFile } from './npy';
import { lookupFeature } from './registry';

export interface ManifestEntry {
  video_id: string;
  feature_name: string;
  source: string;
}

export interface ExportManifest {
  task: string;
  split: string;
  target: string;
  entries: ManifestEntry[];
}

export function loadManifest(manifestPath: string): ExportManifest {
  const parsed = JSON.parse(fs.readFileSync(manifestPath, 'utf-8'));
  for (const key of ['task', 'split', 'target', 'entries']) {
    if (!(key in parsed)) {
      throw new Error(`manifest missing key ${JSON.stringify(key)}`);
    }
  }
  return parsed as ExportManifest;
}

export function exportEntry(entry: ManifestEntry, task: string, split: string, target: string): string {
  const descriptor = lookupFeature(entry.feature_name);
  const rows = readArrayFile(entry.source);
  const outPath = path.join(target, task, split, entry.video_id, `${descriptor.name}.fseq`);
  writeFseq(outPath, entry.video_id, descriptor, rows);
  return outPath;
}

export function runManifest(manifest: ExportManifest): string[] {
  const written: string[] = [];
  for (const entry of manifest.entries) {
    written.push(exportEntry(entry, manifest.task, manifest.split, manifest.target));
  }
  return written;
}
