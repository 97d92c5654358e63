#!/usr/bin/env node
/** fseq-export: bridge extractor outputs into the dataset tree.
 *
 *   fseq-export array --video v001 --feature VGGish --source feats.npy \
 *       --task eri --split train --target data/
 *   fseq-export labels --task va --source raw.csv --out data/va/train/v001.labels
 *   fseq-export manifest --file manifest.json
 */

import { exportLabels, Task } from './labels';
import { exportEntry, loadManifest, runManifest } from './manifest';

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith('--') || i + 1 >= argv.length) {
      throw new Error(`usage error: expected --flag value pairs, got ${JSON.stringify(argv[i])}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

function required(flags: Map<string, string>, name: string): string {
  const v = flags.get(name);
  if (v === undefined) {
    throw new Error(`usage error: missing --${name}`);
  }
  return v;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === 'array') {
      const flags = parseFlags(rest);
      const out = exportEntry(
        {
          video_id: required(flags, 'video'),
          feature_name: required(flags, 'feature'),
          source: required(flags, 'source'),
        },
        required(flags, 'task'),
        required(flags, 'split'),
        required(flags, 'target')
      );
      console.log(out);
      return 0;
    }
    if (command === 'labels') {
      const flags = parseFlags(rest);
      exportLabels(required(flags, 'source'), required(flags, 'task') as Task, required(flags, 'out'));
      console.log(flags.get('out'));
      return 0;
    }
    if (command === 'manifest') {
      const flags = parseFlags(rest);
      const written = runManifest(loadManifest(required(flags, 'file')));
      for (const p of written) {
        console.log(p);
      }
      return 0;
    }
    console.error('usage: fseq-export <array|labels|manifest> [--flag value ...]');
    return 2;
  } catch (e) {
    const message = e instanceof Error ? e.message : String(e);
    if (message.startsWith('usage error')) {
      console.error(message);
      return 2;
    }
    console.error(`error: ${message}`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
