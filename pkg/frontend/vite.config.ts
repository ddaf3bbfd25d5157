import { defineConfig } from 'vitest/config';

export default defineConfig({
  server: {
    port: 5173,
    proxy: {
      // during development the engine runs on its default port
      '/api': 'http://127.0.0.1:7860',
      '/health': 'http://127.0.0.1:7860',
    },
  },
  preview: {
    port: 5174,
    proxy: {
      '/api': 'http://127.0.0.1:7860',
      '/health': 'http://127.0.0.1:7860',
    },
  },
  test: {
    environment: 'jsdom',
    include: ['tests/**/*.test.ts'],
  },
});
