import { createApp } from './app.js';

const root = document.getElementById('app');
if (root) {
  createApp(root, (path, init) => fetch(path, init), window);
}
