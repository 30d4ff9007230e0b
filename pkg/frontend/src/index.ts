export { decodeWav, loadModelAudio, readWav, resampleTo, MODEL_SAMPLE_RATE, WavError } from './wav.js';
export { encodeFeatureFile, writeFeatureFile } from './ftf.js';
export type { FtfHeader } from './ftf.js';
export { frameCount, modelConfig, samplesPerFrame, Wav2VecModel, MODEL_CONFIGS } from './model.js';
export type { ModelConfig } from './model.js';
export { FileWeights, SeededWeights, WeightsFileError } from './weights.js';
export type { WeightSource } from './weights.js';
export { extractFile, listWavFiles, runJob, DEFAULT_LAYER, DEFAULT_MODEL } from './extract.js';
export type { ExtractionJob, ExtractionResult, FileFailure } from './extract.js';
export { main } from './cli.js';
