import { defineConfig } from 'vitest/config';

export default defineConfig({
	test: {
		include: ['tests/**/*.test.ts'],
		// the default-layer extraction test runs a real forward pass on CPU
		testTimeout: 600_000,
		hookTimeout: 600_000,
		fileParallelism: false,
	},
});
