/** wav2vec2-style acoustic model: a strided convolutional feature extractor
 * over raw 16 kHz audio (one frame per 20 ms), a projection into the
 * transformer width, a convolutional relative positional embedding, and a
 * stack of post-norm transformer blocks.
 *
 * `hiddenStates(audio, layer)` returns the hidden state sequence indexed the
 * usual way: 0 is the pre-transformer embedding, N the output of block N.
 * Only the first `layer` blocks are evaluated, so shallow requests stay
 * cheap. Weights come from a WeightSource; see weights.ts for why seeded
 * placeholder weights are the default.
 */

import {
	addBiasInPlace,
	addInPlace,
	conv1d,
	convOutputLength,
	geluInPlace,
	layerNormRows,
	matmul,
	matmulBT,
	normalizeColumns,
	softmaxRowsInPlace,
} from './tensormath.js';
import { WeightSource } from './weights.js';

export interface ModelConfig {
	id: string;
	convChannels: number;
	convKernels: number[];
	convStrides: number[];
	hiddenSize: number;
	numLayers: number;
	numHeads: number;
	ffnSize: number;
	posConvKernel: number;
	posConvGroups: number;
}

export const MODEL_CONFIGS: Record<string, ModelConfig> = {
	'wav2vec2-large-960h': {
		id: 'wav2vec2-large-960h',
		convChannels: 512,
		convKernels: [10, 3, 3, 3, 3, 2, 2],
		convStrides: [5, 2, 2, 2, 2, 2, 2],
		hiddenSize: 1024,
		numLayers: 24,
		numHeads: 16,
		ffnSize: 4096,
		posConvKernel: 128,
		posConvGroups: 16,
	},
	'wav2vec2-base-960h': {
		id: 'wav2vec2-base-960h',
		convChannels: 512,
		convKernels: [10, 3, 3, 3, 3, 2, 2],
		convStrides: [5, 2, 2, 2, 2, 2, 2],
		hiddenSize: 768,
		numLayers: 12,
		numHeads: 12,
		ffnSize: 3072,
		posConvKernel: 128,
		posConvGroups: 16,
	},
};

export function modelConfig(id: string): ModelConfig {
	const cfg = MODEL_CONFIGS[id];
	if (!cfg) {
		const known = Object.keys(MODEL_CONFIGS).join(', ');
		throw new Error(`unknown model id ${id}; known models: ${known}`);
	}
	return cfg;
}

/** Frames produced by the conv stack for a given sample count. */
export function frameCount(cfg: ModelConfig, nSamples: number): number {
	let t = nSamples;
	for (let i = 0; i < cfg.convKernels.length; i++) {
		t = convOutputLength(t, cfg.convKernels[i], cfg.convStrides[i]);
	}
	return t;
}

/** Total stride of the conv stack in samples (320 = 20 ms at 16 kHz). */
export function samplesPerFrame(cfg: ModelConfig): number {
	return cfg.convStrides.reduce((a, b) => a * b, 1);
}

export class Wav2VecModel {
	constructor(
		readonly cfg: ModelConfig,
		private readonly weights: WeightSource,
	) {}

	describeWeights(): string {
		return this.weights.describe();
	}

	/** Run up to transformer block `layer`; returns time-major (frames, hiddenSize). */
	hiddenStates(audio: Float32Array, layer: number): { data: Float32Array; frames: number } {
		if (!Number.isInteger(layer) || layer < 0 || layer > this.cfg.numLayers) {
			throw new Error(
				`layer ${layer} out of range; ${this.cfg.id} has blocks 1..${this.cfg.numLayers} ` +
					`(0 is the pre-transformer embedding)`,
			);
		}
		let x = this.featureExtractor(audio);
		const frames = x.length / this.cfg.convChannels;
		if (frames === 0) {
			throw new Error(
				`audio too short: need at least ${samplesPerFrame(this.cfg) * 2} samples`,
			);
		}
		x = this.featureProjection(x, frames);
		x = this.encoderPrologue(x, frames);
		for (let l = 1; l <= layer; l++) {
			x = this.transformerBlock(x, frames, l);
		}
		return { data: x, frames };
	}

	private tensor(name: string, size: number, fanIn: number): Float32Array {
		return this.weights.tensor(name, size, Math.sqrt(1 / fanIn));
	}

	private bias(name: string, size: number): Float32Array {
		return this.weights.tensor(name, size, 0.02);
	}

	private featureExtractor(audio: Float32Array): Float32Array {
		const c = this.cfg.convChannels;
		let x = audio;
		let tIn = audio.length;
		let cIn = 1;
		for (let i = 0; i < this.cfg.convKernels.length; i++) {
			const k = this.cfg.convKernels[i];
			const s = this.cfg.convStrides[i];
			const w = this.tensor(`feature_extractor.conv${i}.weight`, c * k * cIn, k * cIn);
			x = conv1d(x, tIn, cIn, w, c, k, s);
			tIn = convOutputLength(tIn, k, s);
			cIn = c;
			if (i === 0) {
				// every channel is its own normalization group on the first layer
				normalizeColumns(
					x,
					tIn,
					c,
					this.tensor('feature_extractor.norm0.scale', c, 1),
					this.tensor('feature_extractor.norm0.shift', c, 1),
				);
			}
			geluInPlace(x);
		}
		return x;
	}

	private featureProjection(x: Float32Array, frames: number): Float32Array {
		const c = this.cfg.convChannels;
		const h = this.cfg.hiddenSize;
		const normed = layerNormRows(
			x,
			frames,
			c,
			this.tensor('feature_projection.norm.scale', c, 1),
			this.tensor('feature_projection.norm.shift', c, 1),
		);
		const w = this.tensor('feature_projection.weight', c * h, c);
		const out = matmul(normed, w, frames, c, h);
		addBiasInPlace(out, this.bias('feature_projection.bias', h), frames);
		return out;
	}

	/** Grouped conv positional embedding added to the input, then layer norm.
	 * The result is hidden state 0. */
	private encoderPrologue(x: Float32Array, frames: number): Float32Array {
		const h = this.cfg.hiddenSize;
		const k = this.cfg.posConvKernel;
		const groups = this.cfg.posConvGroups;
		const per = h / groups;
		const pad = Math.floor(k / 2);

		const padded = new Float32Array((frames + 2 * pad) * h);
		padded.set(x, pad * h);

		const w = this.tensor('pos_conv.weight', h * k * per, k * per);
		const pos = new Float32Array((frames + 2 * pad - k + 1) * h);
		const groupIn = new Float32Array((frames + 2 * pad) * per);
		for (let g = 0; g < groups; g++) {
			for (let t = 0; t < frames + 2 * pad; t++) {
				groupIn.set(padded.subarray(t * h + g * per, t * h + (g + 1) * per), t * per);
			}
			const gw = w.subarray(g * per * k * per, (g + 1) * per * k * per);
			const gOut = conv1d(groupIn, frames + 2 * pad, per, gw, per, k, 1);
			const tOut = pos.length / h;
			for (let t = 0; t < tOut; t++) {
				pos.set(gOut.subarray(t * per, (t + 1) * per), t * h + g * per);
			}
		}
		addBiasInPlace(pos, this.bias('pos_conv.bias', h), pos.length / h);
		geluInPlace(pos);
		// even kernel: the padded conv yields one extra frame at the end
		addInPlace(x, pos.subarray(0, frames * h));

		return layerNormRows(
			x,
			frames,
			h,
			this.tensor('encoder.norm.scale', h, 1),
			this.tensor('encoder.norm.shift', h, 1),
		);
	}

	private transformerBlock(x: Float32Array, frames: number, l: number): Float32Array {
		const h = this.cfg.hiddenSize;
		const attnOut = this.attention(x, frames, l);
		addInPlace(attnOut, x);
		let y = layerNormRows(
			attnOut,
			frames,
			h,
			this.tensor(`layer${l}.norm1.scale`, h, 1),
			this.tensor(`layer${l}.norm1.shift`, h, 1),
		);

		const ffn = this.feedForward(y, frames, l);
		addInPlace(ffn, y);
		y = layerNormRows(
			ffn,
			frames,
			h,
			this.tensor(`layer${l}.norm2.scale`, h, 1),
			this.tensor(`layer${l}.norm2.shift`, h, 1),
		);
		return y;
	}

	private attention(x: Float32Array, frames: number, l: number): Float32Array {
		const h = this.cfg.hiddenSize;
		const heads = this.cfg.numHeads;
		const d = h / heads;
		const scale = 1 / Math.sqrt(d);

		const project = (name: string): Float32Array => {
			const w = this.tensor(`layer${l}.attn.${name}.weight`, h * h, h);
			const out = matmul(x, w, frames, h, h);
			addBiasInPlace(out, this.bias(`layer${l}.attn.${name}.bias`, h), frames);
			return out;
		};
		const q = project('q');
		const k = project('k');
		const v = project('v');

		const ctx = new Float32Array(frames * h);
		const qh = new Float32Array(frames * d);
		const kh = new Float32Array(frames * d);
		const vh = new Float32Array(frames * d);
		for (let head = 0; head < heads; head++) {
			const off = head * d;
			for (let t = 0; t < frames; t++) {
				qh.set(q.subarray(t * h + off, t * h + off + d), t * d);
				kh.set(k.subarray(t * h + off, t * h + off + d), t * d);
				vh.set(v.subarray(t * h + off, t * h + off + d), t * d);
			}
			const scores = matmulBT(qh, kh, frames, d, frames);
			for (let i = 0; i < scores.length; i++) scores[i] *= scale;
			softmaxRowsInPlace(scores, frames, frames);
			const mixed = matmul(scores, vh, frames, frames, d);
			for (let t = 0; t < frames; t++) {
				ctx.set(mixed.subarray(t * d, (t + 1) * d), t * h + off);
			}
		}

		const wOut = this.tensor(`layer${l}.attn.out.weight`, h * h, h);
		const out = matmul(ctx, wOut, frames, h, h);
		addBiasInPlace(out, this.bias(`layer${l}.attn.out.bias`, h), frames);
		return out;
	}

	private feedForward(x: Float32Array, frames: number, l: number): Float32Array {
		const h = this.cfg.hiddenSize;
		const f = this.cfg.ffnSize;
		const w1 = this.tensor(`layer${l}.ffn.w1.weight`, h * f, h);
		const mid = matmul(x, w1, frames, h, f);
		addBiasInPlace(mid, this.bias(`layer${l}.ffn.w1.bias`, f), frames);
		geluInPlace(mid);
		const w2 = this.tensor(`layer${l}.ffn.w2.weight`, f * h, f);
		const out = matmul(mid, w2, frames, f, h);
		addBiasInPlace(out, this.bias(`layer${l}.ffn.w2.bias`, h), frames);
		return out;
	}
}
