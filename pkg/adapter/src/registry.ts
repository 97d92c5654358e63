/** Known feature streams and the widths their extractors emit. */

export type Modality = 'audio' | 'visual';

export interface FeatureDescriptor {
  name: string;
  modality: Modality;
  dim: number;
}

const STANDARD_FEATURES: FeatureDescriptor[] = [
  { name: 'IS09', modality: 'audio', dim: 384 },
  { name: 'CNN14', modality: 'audio', dim: 2048 },
  { name: 'VGGish', modality: 'audio', dim: 128 },
  { name: 'eGeMAPS', modality: 'audio', dim: 88 },
  { name: 'DeepSpectrum', modality: 'audio', dim: 1024 },
  { name: 'EAC', modality: 'visual', dim: 2048 },
  { name: 'FAU', modality: 'visual', dim: 17 },
  { name: 'ResNet18', modality: 'visual', dim: 512 },
  { name: 'POSTER', modality: 'visual', dim: 768 },
  { name: 'POSTER2', modality: 'visual', dim: 768 },
];

export function standardRegistry(): Map<string, FeatureDescriptor> {
  return new Map(STANDARD_FEATURES.map((d) => [d.name, d]));
}

export function lookupFeature(name: string): FeatureDescriptor {
  const desc = standardRegistry().get(name);
  if (!desc) {
    const known = STANDARD_FEATURES.map((d) => d.name).join(', ');
    throw new Error(`unknown feature ${JSON.stringify(name)}; known: ${known}`);
  }
  return desc;
}
