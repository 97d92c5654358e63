export { DimMismatchError, NonFiniteError, decodeFseq, encodeFseq, validateArray, writeFseq } from './fseq';
export { AU_COUNT, ERI_DIMS, EXPR_CLASSES, RangeError, Task, convertLabels, exportLabels } from './labels';
export { ExportManifest, ManifestEntry, exportEntry, loadManifest, runManifest } from './manifest';
export { NpyArray, NpyFormatError, parseNpy, readArrayFile, readNpy } from './npy';
export { FeatureDescriptor, Modality, lookupFeature, standardRegistry } from './registry';
