/** Batch extraction: WAV files in, one feature tensor file per input. */

import { mkdirSync, readdirSync, statSync } from 'node:fs';
import { basename, extname, join } from 'node:path';

import { writeFeatureFile } from './ftf.js';
import { modelConfig, Wav2VecModel } from './model.js';
import { loadModelAudio } from './wav.js';
import { FileWeights, SeededWeights, WeightSource } from './weights.js';

export const DEFAULT_MODEL = 'wav2vec2-large-960h';
export const DEFAULT_LAYER = 14;

export interface ExtractionJob {
	inputs: string[];
	outDir: string;
	modelId: string;
	layer: number;
	weightsPath?: string;
}

export interface FileFailure {
	file: string;
	message: string;
}

export interface ExtractionResult {
	written: string[];
	failures: FileFailure[];
}

export function listWavFiles(dir: string): string[] {
	const entries = readdirSync(dir)
		.filter((name) => extname(name).toLowerCase() === '.wav')
		.sort();
	return entries.map((name) => join(dir, name));
}

export function extractFile(
	model: Wav2VecModel,
	layer: number,
	wavPath: string,
	outPath: string,
): void {
	const audio = loadModelAudio(wavPath);
	const { data, frames } = model.hiddenStates(audio.samples, layer);
	const h = model.cfg.hiddenSize;

	// time-major (frames, h) -> feature-major (h, frames) for the file
	const transposed = new Float32Array(h * frames);
	for (let t = 0; t < frames; t++) {
		for (let j = 0; j < h; j++) {
			transposed[j * frames + t] = data[t * h + j];
		}
	}

	writeFeatureFile(outPath, transposed, {
		rows: h,
		cols: frames,
		sampleRateHz: frames / audio.durationS,
		unit: '',
		source:
			`${model.cfg.id} hidden_states[${layer}] ` +
			`(0 = pre-transformer embedding; ${model.describeWeights()}) ` +
			`from ${basename(wavPath)}`,
	});
}

export function runJob(job: ExtractionJob): ExtractionResult {
	const cfg = modelConfig(job.modelId);
	const weights: WeightSource = job.weightsPath
		? new FileWeights(job.weightsPath)
		: new SeededWeights(cfg.id);
	const model = new Wav2VecModel(cfg, weights);

	mkdirSync(job.outDir, { recursive: true });
	const result: ExtractionResult = { written: [], failures: [] };
	for (const wavPath of job.inputs) {
		const outPath = join(job.outDir, basename(wavPath, extname(wavPath)) + '.ftf');
		try {
			statSync(wavPath);
			extractFile(model, job.layer, wavPath, outPath);
			result.written.push(outPath);
		} catch (e) {
			result.failures.push({ file: wavPath, message: (e as Error).message });
		}
	}
	if (weights instanceof FileWeights) weights.close();
	return result;
}
